//! Procedural scenes of colored shapes with compositional referring
//! expressions and exact ground-truth masks.
//!
//! Objects never overlap geometrically; overlap between ground-truth masks
//! comes from expressions that share objects (`red thing` covers every red
//! object, including the one called `large red square`).

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::{pnm, rng};

/// Fixed token vocabulary shared by the generator and the text encoder.
pub struct Vocab;

impl Vocab {
    pub const BOS: usize = 0;
    pub const EOS: usize = 1;
    pub const COLOR_BASE: usize = 2;
    pub const SHAPE_BASE: usize = 10;
    pub const SIZE_BASE: usize = 13;
    pub const THING: usize = 15;
    pub const SIZE: usize = 16;

    pub const WORDS: [&'static str; 16] = [
        "[BOS]", "[EOS]", "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
        "square", "circle", "triangle", "small", "large", "thing",
    ];

    pub fn word(id: usize) -> &'static str {
        Self::WORDS.get(id).copied().unwrap_or("[UNK]")
    }

    pub fn id(word: &str) -> Option<usize> {
        Self::WORDS.iter().position(|w| *w == word)
    }

    pub fn render(tokens: &[usize]) -> String {
        tokens.iter().map(|&t| Self::word(t)).collect::<Vec<_>>().join(" ")
    }

    /// Parses whitespace-separated words into token ids.
    pub fn parse(text: &str) -> Result<Vec<usize>> {
        let ids = text
            .split_whitespace()
            .map(|w| {
                Self::id(&w.to_lowercase())
                    .filter(|&id| id != Self::BOS && id != Self::EOS)
                    .ok_or_else(|| Error::Config(format!("unknown word {w:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(ids)
    }
}

pub const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.75, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.90, 0.10],
    [0.10, 0.85, 0.90],
    [0.85, 0.10, 0.85],
    [0.95, 0.95, 0.95],
    [1.00, 0.55, 0.05],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn token(self) -> usize {
        Vocab::SHAPE_BASE + self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Size {
    Small,
    Large,
}

impl Size {
    pub fn token(self) -> usize {
        Vocab::SIZE_BASE + self as usize
    }
}

/// Palette index in `0..8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Color(pub usize);

impl Color {
    pub fn token(self) -> usize {
        Vocab::COLOR_BASE + self.0
    }

    pub fn name(self) -> &'static str {
        Vocab::word(self.token())
    }

    pub fn from_name(name: &str) -> Option<Color> {
        let id = Vocab::id(name)?;
        (Vocab::COLOR_BASE..Vocab::SHAPE_BASE).contains(&id).then(|| Color(id - Vocab::COLOR_BASE))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    pub center: (f64, f64),
    pub radius: f64,
}

impl Object {
    /// Pixel-center inside test at pixel `(y, x)`.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        let (cy, cx) = self.center;
        let (dy, dx) = (py - cy, px - cx);
        let r = self.radius;
        match self.shape {
            Shape::Square => dx.abs() <= r && dy.abs() <= r,
            Shape::Circle => dx * dx + dy * dy <= r * r,
            // Apex at the top, base at the bottom, half-width r at the base.
            Shape::Triangle => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
        }
    }

    pub fn rasterize(&self, height: usize, width: usize) -> Mask {
        let mut m = Mask::empty(height, width);
        for y in 0..height {
            for x in 0..width {
                if self.contains(y, x) {
                    m.set(y, x, true);
                }
            }
        }
        m
    }

    fn extent(&self) -> f64 {
        self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExprKind {
    ColorShape,
    SizeColorShape,
    ColorThing,
    SizeThing,
}

impl ExprKind {
    pub const ALL: [ExprKind; 4] = [
        ExprKind::ColorShape,
        ExprKind::SizeColorShape,
        ExprKind::ColorThing,
        ExprKind::SizeThing,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExprKind::ColorShape => "color-shape",
            ExprKind::SizeColorShape => "size-color-shape",
            ExprKind::ColorThing => "color-thing",
            ExprKind::SizeThing => "size-thing",
        }
    }
}

/// A referring expression as content tokens (no BOS/EOS).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Expression {
    pub tokens: Vec<usize>,
    pub kind: ExprKind,
}

impl Expression {
    pub fn text(&self) -> String {
        Vocab::render(&self.tokens)
    }

    fn matches(&self, o: &Object) -> bool {
        match self.kind {
            ExprKind::ColorShape => self.tokens == [o.color.token(), o.shape.token()],
            ExprKind::SizeColorShape => self.tokens == [o.size.token(), o.color.token(), o.shape.token()],
            ExprKind::ColorThing => self.tokens[0] == o.color.token(),
            ExprKind::SizeThing => self.tokens[0] == o.size.token(),
        }
    }

    /// Whether the expression names the composition `(color, shape)`.
    pub fn names_composition(&self, color: Color, shape: Shape) -> bool {
        self.tokens.contains(&color.token()) && self.tokens.contains(&shape.token())
    }
}

/// Which population a scene is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    /// Never contains a held-out composition.
    Train,
    /// Evaluation scenes under the training grammar.
    EvalSeen,
    /// Evaluation scenes with at least one held-out composition each.
    EvalHeldout,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::EvalSeen => 2,
            Split::EvalHeldout => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub num_colors: usize,
    pub num_shapes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub small_radius: (f64, f64),
    pub large_radius: (f64, f64),
    pub background: f64,
    pub noise: f64,
    pub holdout: Vec<(Color, Shape)>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            num_colors: 8,
            num_shapes: 3,
            min_objects: 2,
            max_objects: 5,
            small_radius: (5.0, 7.0),
            large_radius: (10.0, 13.0),
            background: 0.08,
            noise: 0.02,
            holdout: vec![(Color(2), Shape::Triangle), (Color(3), Shape::Circle)],
        }
    }
}

/// The training grammar left after removing held-out compositions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub colors: Vec<Color>,
    pub shapes: Vec<Shape>,
    pub allowed: Vec<(Color, Shape)>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_colors == 0 || self.num_colors > PALETTE.len() {
            return bad(format!("num_colors must be in 1..={}", PALETTE.len()));
        }
        if self.num_shapes == 0 || self.num_shapes > Shape::ALL.len() {
            return bad("num_shapes must be in 1..=3".into());
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::PatchSize {
                height: self.image_size,
                width: self.image_size,
                patch: self.patch_size,
            });
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return bad("need 1 <= min_objects <= max_objects".into());
        }
        let biggest = self.small_radius.1.max(self.large_radius.1);
        if !(self.small_radius.0 >= 1.0 && self.small_radius.0 <= self.small_radius.1)
            || !(self.large_radius.0 <= self.large_radius.1)
            || 2.0 * biggest + 2.0 > self.image_size as f64
        {
            return bad("object radii do not fit the image".into());
        }
        for &(c, s) in &self.holdout {
            if c.0 >= self.num_colors || s as usize >= self.num_shapes {
                return bad(format!("held-out pair ({}, {:?}) outside the palette", c.name(), s));
            }
        }
        Ok(())
    }

    fn colors(&self) -> Vec<Color> {
        (0..self.num_colors).map(Color).collect()
    }

    fn shapes(&self) -> Vec<Shape> {
        Shape::ALL[..self.num_shapes].to_vec()
    }

    fn is_heldout(&self, c: Color, s: Shape) -> bool {
        self.holdout.contains(&(c, s))
    }
}

/// Splits the attribute grammar into training compositions and held-out
/// compositions.
pub fn holdout_split(config: &SynthConfig) -> Result<(Grammar, Vec<(Color, Shape)>)> {
    config.validate()?;
    if config.num_colors < 2 || config.num_shapes < 2 {
        return Err(Error::Config("holdout needs at least two colors and two shapes".into()));
    }
    let colors = config.colors();
    let shapes = config.shapes();
    let allowed: Vec<_> = colors
        .iter()
        .flat_map(|&c| shapes.iter().map(move |&s| (c, s)))
        .filter(|&(c, s)| !config.is_heldout(c, s))
        .collect();
    for &c in &colors {
        if !allowed.iter().any(|&(ac, _)| ac == c) {
            return Err(Error::Config(format!("color {} unseen in training", c.name())));
        }
    }
    for &s in &shapes {
        if !allowed.iter().any(|&(_, a)| a == s) {
            return Err(Error::Config(format!("shape {s:?} unseen in training")));
        }
    }
    Ok((
        Grammar {
            colors,
            shapes,
            allowed,
        },
        config.holdout.clone(),
    ))
}

thread_local! {
    static WEAK_FIREWALL: Cell<bool> = const { Cell::new(false) };
}

/// While alive, any access to ground-truth masks on this thread panics.
pub struct FirewallGuard {
    previous: bool,
}

impl FirewallGuard {
    pub fn engage() -> Self {
        let previous = WEAK_FIREWALL.with(|f| f.replace(true));
        Self { previous }
    }

    pub fn is_engaged() -> bool {
        WEAK_FIREWALL.with(Cell::get)
    }
}

impl Drop for FirewallGuard {
    fn drop(&mut self) {
        WEAK_FIREWALL.with(|f| f.set(self.previous));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub seed: u64,
    pub image: Image,
    pub objects: Vec<Object>,
    pub expressions: Vec<Expression>,
    gt_masks: Vec<Mask>,
}

/// What the weakly-supervised loop is allowed to see of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakExample {
    pub image: Image,
    pub expressions: Vec<Expression>,
}

impl SynthScene {
    /// Ground-truth masks, one per expression.
    ///
    /// # Panics
    /// When called while a [`FirewallGuard`] is engaged on this thread.
    pub fn gt_masks(&self) -> &[Mask] {
        assert!(
            !FirewallGuard::is_engaged(),
            "ground-truth masks accessed on the weakly-supervised path"
        );
        &self.gt_masks
    }

    pub fn weak_view(&self) -> WeakExample {
        WeakExample {
            image: self.image.clone(),
            expressions: self.expressions.clone(),
        }
    }

    pub fn expression_index(&self, tokens: &[usize]) -> Option<usize> {
        self.expressions.iter().position(|e| e.tokens == tokens)
    }
}

fn expressions_for(objects: &[Object], height: usize, width: usize) -> (Vec<Expression>, Vec<Mask>) {
    let mut found: Vec<Expression> = Vec::new();
    for o in objects {
        let candidates = [
            Expression {
                tokens: vec![o.color.token(), o.shape.token()],
                kind: ExprKind::ColorShape,
            },
            Expression {
                tokens: vec![o.size.token(), o.color.token(), o.shape.token()],
                kind: ExprKind::SizeColorShape,
            },
            Expression {
                tokens: vec![o.color.token(), Vocab::THING],
                kind: ExprKind::ColorThing,
            },
            Expression {
                tokens: vec![o.size.token(), Vocab::THING],
                kind: ExprKind::SizeThing,
            },
        ];
        for e in candidates {
            if !found.contains(&e) {
                found.push(e);
            }
        }
    }
    found.sort();
    let rasters: Vec<Mask> = objects.iter().map(|o| o.rasterize(height, width)).collect();
    let masks = found
        .iter()
        .map(|e| {
            objects
                .iter()
                .zip(&rasters)
                .filter(|(o, _)| e.matches(o))
                .fold(Mask::empty(height, width), |acc, (_, m)| acc.union(m))
        })
        .collect();
    (found, masks)
}

/// Generates one scene, deterministically in `seed`.
pub fn generate_scene(seed: u64, config: &SynthConfig, split: Split) -> Result<SynthScene> {
    config.validate()?;
    let (grammar, heldout) = if config.num_colors >= 2 && config.num_shapes >= 2 {
        holdout_split(config)?
    } else {
        let colors = config.colors();
        let shapes = config.shapes();
        let allowed = colors.iter().flat_map(|&c| shapes.iter().map(move |&s| (c, s))).collect();
        (Grammar { colors, shapes, allowed }, Vec::new())
    };
    if split == Split::EvalHeldout && heldout.is_empty() {
        return Err(Error::Config("no held-out compositions configured".into()));
    }
    let size = config.image_size as f64;
    let mut rng = rng::stream(seed, &[split.tag()]);

    let objects = 'attempt: loop {
        let count = rng.random_range(config.min_objects..=config.max_objects);
        let mut objects: Vec<Object> = Vec::with_capacity(count);
        for k in 0..count {
            let (color, shape) = if split == Split::EvalHeldout && k == 0 {
                heldout[rng.random_range(0..heldout.len())]
            } else {
                grammar.allowed[rng.random_range(0..grammar.allowed.len())]
            };
            let object_size = if rng.random_bool(0.5) { Size::Small } else { Size::Large };
            let (lo, hi) = match object_size {
                Size::Small => config.small_radius,
                Size::Large => config.large_radius,
            };
            let mut placed = None;
            for _ in 0..200 {
                let radius = rng.random_range(lo..=hi);
                let cy = rng.random_range(radius + 1.0..=size - radius - 1.0);
                let cx = rng.random_range(radius + 1.0..=size - radius - 1.0);
                let candidate = Object {
                    shape,
                    color,
                    size: object_size,
                    center: (cy, cx),
                    radius,
                };
                let clear = objects.iter().all(|o| {
                    let gap = o.extent() + candidate.extent() + 2.0;
                    (o.center.0 - cy).abs() > gap || (o.center.1 - cx).abs() > gap
                });
                if clear {
                    placed = Some(candidate);
                    break;
                }
            }
            match placed {
                Some(o) => objects.push(o),
                None if objects.len() >= config.min_objects => break,
                None => continue 'attempt,
            }
        }
        break objects;
    };

    let (h, w) = (config.image_size, config.image_size);
    let mut image = Image::new(h, w, 3);
    for v in image.data.iter_mut() {
        *v = (config.background + config.noise * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0);
    }
    for o in &objects {
        let rgb = PALETTE[o.color.0];
        for y in 0..h {
            for x in 0..w {
                if o.contains(y, x) {
                    for c in 0..3 {
                        let v = rgb[c] + config.noise * rng.random_range(-1.0..1.0);
                        image.set(y, x, c, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    let (expressions, gt_masks) = expressions_for(&objects, h, w);
    Ok(SynthScene {
        seed,
        image,
        objects,
        expressions,
        gt_masks,
    })
}

/// Flips the image and all masks left-right when `coin` is set.
pub fn hflip_augment(scene: &SynthScene, coin: bool) -> SynthScene {
    if !coin {
        return scene.clone();
    }
    let w = scene.image.width as f64;
    SynthScene {
        seed: scene.seed,
        image: scene.image.hflip(),
        objects: scene
            .objects
            .iter()
            .map(|o| Object {
                center: (o.center.0, w - o.center.1),
                ..o.clone()
            })
            .collect(),
        expressions: scene.expressions.clone(),
        gt_masks: scene.gt_masks.iter().map(Mask::hflip).collect(),
    }
}

/// Expressions pooled across a mini-batch with image-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    /// Deduplicated union of sampled positives, in first-seen order.
    pub pool: Vec<Expression>,
    /// `labels[b][j]` is 1 when pooled expression `j` is present in image `b`.
    pub labels: Vec<Vec<f64>>,
    /// Pool indices sampled as positives for each image.
    pub sampled: Vec<Vec<usize>>,
    /// Every expression present in each image (image-level annotation).
    pub present: Vec<Vec<Expression>>,
}

/// Samples positives per image and pools them across the batch.
///
/// The number of positives per image is Poisson with mean
/// `positives_mean`, clamped to `[1, available]`.
pub fn build_batch(examples: &[WeakExample], seed: u64, positives_mean: f64) -> Result<BatchSpec> {
    if examples.len() < 2 {
        return Err(Error::Config("a batch needs at least two images".into()));
    }
    let poisson = Poisson::new(positives_mean).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = rng::stream(seed, &[0xba7c4]);
    let mut pool: Vec<Expression> = Vec::new();
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut sampled = Vec::with_capacity(examples.len());
    for ex in examples {
        let available = ex.expressions.len();
        if available == 0 {
            return Err(Error::Config("image has no expressions".into()));
        }
        let k = (poisson.sample(&mut rng) as usize).clamp(1, available);
        let mut order: Vec<usize> = (0..available).collect();
        order.shuffle(&mut rng);
        let mut picks: Vec<usize> = order[..k].to_vec();
        picks.sort_unstable();
        let mut cols = Vec::with_capacity(k);
        for p in picks {
            let e = &ex.expressions[p];
            let j = *index.entry(e.tokens.clone()).or_insert_with(|| {
                pool.push(e.clone());
                pool.len() - 1
            });
            cols.push(j);
        }
        sampled.push(cols);
    }
    let labels = examples
        .iter()
        .map(|ex| {
            pool.iter()
                .map(|p| f64::from(u8::from(ex.expressions.iter().any(|e| e.tokens == p.tokens))))
                .collect()
        })
        .collect();
    Ok(BatchSpec {
        pool,
        labels,
        sampled,
        present: examples.iter().map(|e| e.expressions.clone()).collect(),
    })
}

/// tf-idf weights over a set of documents: raw term counts, smoothed idf
/// `ln((1+n)/(1+df)) + 1`, L2-normalized rows.
pub struct TfIdf {
    idf: BTreeMap<usize, f64>,
    docs: f64,
}

impl TfIdf {
    pub fn fit(docs: &[&[usize]]) -> Self {
        let mut df: BTreeMap<usize, usize> = BTreeMap::new();
        for d in docs {
            let mut seen: Vec<usize> = d.to_vec();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = df
            .into_iter()
            .map(|(t, c)| (t, ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0))
            .collect();
        Self { idf, docs: n }
    }

    fn idf(&self, token: usize) -> f64 {
        self.idf.get(&token).copied().unwrap_or_else(|| (1.0 + self.docs).ln() + 1.0)
    }

    pub fn vector(&self, doc: &[usize]) -> BTreeMap<usize, f64> {
        let mut v: BTreeMap<usize, f64> = BTreeMap::new();
        for &t in doc {
            *v.entry(t).or_default() += 1.0;
        }
        for (t, w) in v.iter_mut() {
            *w *= self.idf(*t);
        }
        let norm = v.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.values_mut().for_each(|w| *w /= norm);
        }
        v
    }

    pub fn cosine(&self, a: &[usize], b: &[usize]) -> f64 {
        let (va, vb) = (self.vector(a), self.vector(b));
        va.iter().map(|(t, w)| w * vb.get(t).copied().unwrap_or(0.0)).sum()
    }
}

/// Soft labels: the best tf-idf cosine between each pooled expression and
/// any expression present in the image, with idf over the batch pool.
pub fn tfidf_labels(batch: &BatchSpec) -> Vec<Vec<f64>> {
    let docs: Vec<&[usize]> = batch.pool.iter().map(|e| e.tokens.as_slice()).collect();
    let model = TfIdf::fit(&docs);
    batch
        .present
        .iter()
        .map(|present| {
            batch
                .pool
                .iter()
                .map(|p| {
                    present
                        .iter()
                        .map(|e| model.cosine(&p.tokens, &e.tokens))
                        .fold(0.0, f64::max)
                        .clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct ManifestScene {
    seed: u64,
    image: String,
    expressions: Vec<ManifestExpression>,
}

#[derive(Serialize)]
struct ManifestExpression {
    tokens: Vec<usize>,
    text: String,
    kind: ExprKind,
    mask: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    vocab: &'a [&'a str],
    config: &'a SynthConfig,
    split: Split,
    scenes: Vec<ManifestScene>,
}

/// Writes scenes as P6 images, P5 masks and a JSON manifest.
pub fn dump_dataset(dir: &Path, scenes: &[SynthScene], config: &SynthConfig, split: Split) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let image = format!("scene_{i:05}.ppm");
        pnm::write(&dir.join(&image), &pnm::encode_rgb(&scene.image))?;
        let mut expressions = Vec::new();
        for (j, (e, m)) in scene.expressions.iter().zip(scene.gt_masks()).enumerate() {
            let mask = format!("scene_{i:05}_expr_{j:02}.pgm");
            pnm::write(&dir.join(&mask), &pnm::encode_mask(m))?;
            expressions.push(ManifestExpression {
                tokens: e.tokens.clone(),
                text: e.text(),
                kind: e.kind,
                mask,
            });
        }
        entries.push(ManifestScene {
            seed: scene.seed,
            image,
            expressions,
        });
    }
    let manifest = Manifest {
        vocab: &Vocab::WORDS,
        config,
        split,
        scenes: entries,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(seed: u64) -> SynthScene {
        generate_scene(seed, &SynthConfig::default(), Split::Train).unwrap()
    }

    fn expr(words: &str, kind: ExprKind) -> Expression {
        Expression {
            tokens: Vocab::parse(words).unwrap(),
            kind,
        }
    }

    fn handmade(objects: Vec<Object>) -> SynthScene {
        let (expressions, gt_masks) = expressions_for(&objects, 64, 64);
        SynthScene {
            seed: 0,
            image: Image::new(64, 64, 3),
            objects,
            expressions,
            gt_masks,
        }
    }

    fn obj(shape: Shape, color: usize, size: Size, center: (f64, f64), radius: f64) -> Object {
        Object {
            shape,
            color: Color(color),
            size,
            center,
            radius,
        }
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(scene(11), scene(11));
        assert_ne!(scene(11).image, scene(12).image);
    }

    #[test]
    fn object_count_and_non_degenerate() {
        for seed in 0..50 {
            let s = scene(seed);
            assert!((2..=5).contains(&s.objects.len()));
            for o in &s.objects {
                assert!(o.rasterize(64, 64).area() > 20);
            }
            for (e, m) in s.expressions.iter().zip(s.gt_masks()) {
                assert!(!m.is_empty(), "{} has an empty mask", e.text());
            }
        }
    }

    #[test]
    fn single_red_square_thing_equals_square() {
        let s = handmade(vec![
            obj(Shape::Square, 0, Size::Large, (16.0, 16.0), 10.0),
            obj(Shape::Circle, 1, Size::Small, (48.0, 48.0), 6.0),
        ]);
        let thing = s.expression_index(&Vocab::parse("red thing").unwrap()).unwrap();
        let square = s.expression_index(&Vocab::parse("red square").unwrap()).unwrap();
        assert_eq!(s.gt_masks()[thing], s.gt_masks()[square]);
    }

    #[test]
    fn red_thing_is_union_of_red_objects() {
        let s = handmade(vec![
            obj(Shape::Square, 0, Size::Large, (16.0, 16.0), 10.0),
            obj(Shape::Circle, 0, Size::Small, (48.0, 48.0), 6.0),
        ]);
        let m = |w: &str| s.gt_masks()[s.expression_index(&Vocab::parse(w).unwrap()).unwrap()].clone();
        let thing = m("red thing");
        assert_eq!(thing, m("red square").union(&m("red circle")));
        assert!(thing.overlaps(&m("red square")));
        assert!(thing.overlaps(&m("red circle")));
    }

    #[test]
    fn overlapping_masks_are_common() {
        let overlapping = (0..100)
            .filter(|&seed| {
                let s = scene(seed);
                let m = s.gt_masks();
                (0..m.len()).any(|i| (i + 1..m.len()).any(|j| m[i].overlaps(&m[j])))
            })
            .count();
        assert!(overlapping >= 30, "{overlapping}");
    }

    #[test]
    fn hflip_is_an_involution_preserving_area() {
        let s = scene(3);
        let f = hflip_augment(&s, true);
        for (a, b) in s.gt_masks().iter().zip(f.gt_masks()) {
            assert_eq!(a.area(), b.area());
        }
        assert_eq!(hflip_augment(&f, true).image, s.image);
        assert_eq!(hflip_augment(&f, true).gt_masks(), s.gt_masks());
        assert_eq!(hflip_augment(&s, false), s);
    }

    #[test]
    fn hflip_of_centered_square() {
        let s = handmade(vec![obj(Shape::Square, 0, Size::Large, (32.0, 32.0), 10.0)]);
        let f = hflip_augment(&s, true);
        assert_eq!(f.gt_masks(), s.gt_masks());
    }

    #[test]
    fn heldout_compositions_stay_out_of_training() {
        let cfg = SynthConfig {
            holdout: vec![(Color(2), Shape::Triangle)],
            ..SynthConfig::default()
        };
        for seed in 0..200 {
            let s = generate_scene(seed, &cfg, Split::Train).unwrap();
            assert!(!s.objects.iter().any(|o| o.color == Color(2) && o.shape == Shape::Triangle));
            let e = generate_scene(seed, &cfg, Split::EvalHeldout).unwrap();
            assert!(e.objects.iter().any(|o| o.color == Color(2) && o.shape == Shape::Triangle));
        }
    }

    #[test]
    fn holdout_split_rejects_unseen_attribute() {
        let cfg = SynthConfig {
            num_shapes: 2,
            holdout: (0..8).map(|c| (Color(c), Shape::Square)).collect(),
            ..SynthConfig::default()
        };
        assert!(holdout_split(&cfg).is_err());
        let cfg = SynthConfig {
            num_colors: 1,
            ..SynthConfig::default()
        };
        assert!(holdout_split(&cfg).is_err());
    }

    #[test]
    fn zero_palette_is_rejected() {
        let cfg = SynthConfig {
            num_colors: 0,
            ..SynthConfig::default()
        };
        assert!(generate_scene(0, &cfg, Split::Train).is_err());
    }

    #[test]
    fn disjoint_vocabularies_give_block_diagonal_labels() {
        let a = WeakExample {
            image: Image::new(1, 1, 3),
            expressions: vec![expr("red square", ExprKind::ColorShape)],
        };
        let b = WeakExample {
            image: Image::new(1, 1, 3),
            expressions: vec![expr("blue circle", ExprKind::ColorShape)],
        };
        let batch = build_batch(&[a, b], 1, 3.0).unwrap();
        assert_eq!(batch.labels, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn duplicate_expression_pools_to_one_column() {
        let e = vec![expr("red thing", ExprKind::ColorThing)];
        let a = WeakExample {
            image: Image::new(1, 1, 3),
            expressions: e.clone(),
        };
        let batch = build_batch(&[a.clone(), a], 1, 3.0).unwrap();
        assert_eq!(batch.pool.len(), 1);
        assert_eq!(batch.labels, vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn batch_is_deterministic_and_every_column_positive() {
        let ex: Vec<WeakExample> = (0..6).map(|s| scene(s).weak_view()).collect();
        let b1 = build_batch(&ex, 5, 3.0).unwrap();
        assert_eq!(b1, build_batch(&ex, 5, 3.0).unwrap());
        for j in 0..b1.pool.len() {
            assert!(b1.labels.iter().any(|row| row[j] == 1.0));
        }
        assert!(build_batch(&ex[..1], 5, 3.0).is_err());
    }

    #[test]
    fn tfidf_extremes() {
        let docs: Vec<Vec<usize>> = ["red square", "red circle", "blue triangle"]
            .iter()
            .map(|w| Vocab::parse(w).unwrap())
            .collect();
        let refs: Vec<&[usize]> = docs.iter().map(Vec::as_slice).collect();
        let t = TfIdf::fit(&refs);
        assert!((t.cosine(&docs[0], &docs[0]) - 1.0).abs() < 1e-12);
        assert_eq!(t.cosine(&docs[0], &docs[2]), 0.0);
        // Frozen from an independent scikit-learn TfidfVectorizer run.
        assert!((t.cosine(&docs[0], &docs[1]) - 0.366_446_816_266_513_1).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "weakly-supervised path")]
    fn firewall_blocks_mask_access() {
        let s = scene(0);
        let _guard = FirewallGuard::engage();
        let _ = s.gt_masks();
    }
}
