//! Finite-difference checks of every differentiable pipeline: similarity
//! through pooled scores for each mechanism, the soft-margin loss, the Dice
//! loss and the fully-supervised read-out.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decode::upsample_matrix;
use crate::encoders::{similarity, ProjectionParams};
use crate::error::TensorError;
use crate::gradcheck::gradcheck;
use crate::graph::{Graph, Var};
use crate::objectives::{dice, soft_margin};
use crate::pooling::{image_text_scores, Mechanism, PoolingConfig};
use crate::rng;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub pipeline: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn lift(e: crate::Error) -> TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => TensorError::Domain {
            op: "pipeline",
            detail: other.to_string(),
        },
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn weighted_sum(g: &mut Graph, x: Var, weights: &Tensor) -> Result<Var, TensorError> {
    let w = g.constant(weights.clone());
    let p = g.mul(x, w)?;
    g.sum(p)
}

const N: usize = 16;
const L: usize = 3;
const DI: usize = 6;
const DT: usize = 5;
const D: usize = 4;

/// Patch tokens, text tokens, both projections and `log τ` at a random point.
fn similarity_point(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![
        uniform(rng, &[N, DI], -1.0, 1.0),
        uniform(rng, &[L, DT], -1.0, 1.0),
        uniform(rng, &[DI, D], -1.0, 1.0),
        uniform(rng, &[DT, D], -1.0, 1.0),
        Tensor::scalar(rng.random_range(-0.5..0.7)),
    ]
}

fn similarity_of(g: &mut Graph, v: &[Var]) -> Result<Var, TensorError> {
    let proj = ProjectionParams {
        image: v[2],
        text: v[3],
        log_temperature: v[4],
    };
    similarity(g, &proj, v[0], v[1]).map_err(lift)
}

fn pooled_pipeline(mechanism: Mechanism, rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let point = similarity_point(rng);
    let weights = uniform(rng, &[1, L], -1.0, 1.0);
    let cfg = PoolingConfig::with_mechanism(mechanism);
    gradcheck(
        |g, v| {
            let s = similarity_of(g, v)?;
            let z = image_text_scores(g, s, &cfg).map_err(lift)?.z;
            weighted_sum(g, z, &weights)
        },
        &point,
        STEP,
    )
}

fn soft_margin_pipeline(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let z = uniform(rng, &[1, 6], -4.0, 4.0);
    let labels: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
    gradcheck(|g, v| soft_margin(g, v[0], &labels).map_err(lift), &[z], STEP)
}

fn dice_pipeline(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let m = uniform(rng, &[12, 2], 0.05, 0.95);
    let target = Tensor::from_fn(&[12, 2], |_| f64::from(u8::from(rng.random_bool(0.4))));
    gradcheck(|g, v| dice(g, v[0], &target).map_err(lift), &[m], STEP)
}

fn full_readout_pipeline(rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    let point = similarity_point(rng);
    let u = upsample_matrix(4, 4, 8, 8);
    let target = Tensor::from_fn(&[64, L], |_| f64::from(u8::from(rng.random_bool(0.3))));
    gradcheck(
        |g, v| {
            let s = similarity_of(g, v)?;
            let uc = g.constant(u.clone());
            let pix = g.matmul(uc, s)?;
            let probs = g.sigmoid(pix)?;
            dice(g, probs, &target).map_err(lift)
        },
        &point,
        STEP,
    )
}

/// Runs every pipeline at `points` random points derived from `seed`.
pub fn run(points: usize, seed: u64) -> Vec<CheckResult> {
    type Pipeline = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64, TensorError>>;
    let pipelines: Vec<(&str, Pipeline)> = vec![
        ("similarity>gap", Box::new(|r| pooled_pipeline(Mechanism::Gap, r))),
        ("similarity>gmp", Box::new(|r| pooled_pipeline(Mechanism::Gmp, r))),
        ("similarity>spa>gwp+size", Box::new(|r| pooled_pipeline(Mechanism::Spa, r))),
        ("similarity>mpa>gwp+size", Box::new(|r| pooled_pipeline(Mechanism::Mpa, r))),
        ("soft_margin", Box::new(soft_margin_pipeline)),
        ("dice", Box::new(dice_pipeline)),
        ("similarity>upsample>sigmoid>dice", Box::new(full_readout_pipeline)),
    ];
    pipelines
        .into_iter()
        .enumerate()
        .map(|(k, (name, f))| {
            let mut worst = 0.0f64;
            let mut ok = true;
            for p in 0..points {
                let mut r = rng::stream(seed, &[k as u64, p as u64]);
                match f(&mut r) {
                    Ok(e) => worst = worst.max(e),
                    Err(_) => {
                        ok = false;
                        worst = f64::INFINITY;
                    }
                }
            }
            CheckResult {
                pipeline: name.to_string(),
                points,
                max_rel_error: worst,
                passed: ok && worst < TOLERANCE,
            }
        })
        .collect()
}
