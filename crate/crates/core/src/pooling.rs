//! Reduction of an `N×L` patch–text similarity matrix to `L` image-level
//! scores.
//!
//! * GAP: mean over patches.
//! * GMP: max over patches.
//! * GWP: mask-weighted mean, `w_ij = m_ij / (Σ_i m_ij + ε)`, with masks from
//!   single-label assignment (SPA, softmax over expressions plus a constant
//!   background logit) or multi-label assignment (MPA, an independent sigmoid
//!   per expression against the background logit). GWP scores are summed with
//!   the size term `(1 − m̄_j)^p · log(λ + m̄_j)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mechanism {
    Gap,
    Gmp,
    Spa,
    Mpa,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [Mechanism::Gap, Mechanism::Gmp, Mechanism::Spa, Mechanism::Mpa];

    pub fn has_masks(self) -> bool {
        matches!(self, Mechanism::Spa | Mechanism::Mpa)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Gap => "GAP",
            Mechanism::Gmp => "GMP",
            Mechanism::Spa => "SPA",
            Mechanism::Mpa => "MPA",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gap" => Ok(Mechanism::Gap),
            "gmp" => Ok(Mechanism::Gmp),
            "spa" => Ok(Mechanism::Spa),
            "mpa" => Ok(Mechanism::Mpa),
            other => Err(Error::Config(format!("unknown mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub lambda: f64,
    pub power: f64,
    pub background: f64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Mpa,
            epsilon: 1e-5,
            lambda: 0.01,
            power: 5.0,
            background: 0.0,
        }
    }
}

impl PoolingConfig {
    pub fn with_mechanism(mechanism: Mechanism) -> Self {
        Self {
            mechanism,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config("lambda must lie in (0, 1]".into()));
        }
        if !(self.power >= 0.0) {
            return Err(Error::Config("power must be non-negative".into()));
        }
        if !self.background.is_finite() {
            return Err(Error::Config("background logit must be finite".into()));
        }
        Ok(())
    }
}

/// Graph handles produced by [`image_text_scores`]; all scores are `1×L`.
#[derive(Debug, Clone, Copy)]
pub struct Pooled {
    pub z: Var,
    pub z_gwp: Option<Var>,
    pub z_size: Option<Var>,
    /// `N×L` for MPA, `N×(L+1)` with the background in column 0 for SPA.
    pub masks: Option<Var>,
}

fn check_matrix(g: &Graph, s: Var) -> Result<(usize, usize)> {
    Ok(g.value(s).dims2()?)
}

/// `z_j = (1/N) Σ_i s_ij`.
pub fn gap(g: &mut Graph, s: Var) -> Result<Var> {
    let (n, _) = check_matrix(g, s)?;
    let total = g.sum_axis(s, 0)?;
    Ok(g.scale(total, 1.0 / n as f64)?)
}

/// `z_j = max_i s_ij`.
pub fn gmp(g: &mut Graph, s: Var) -> Result<Var> {
    check_matrix(g, s)?;
    Ok(g.max_axis(s, 0)?)
}

/// Softmax over `[s_bg, s_i1, …, s_iL]` per patch; column 0 is background.
pub fn spa_masks(g: &mut Graph, s: Var, background: f64) -> Result<Var> {
    let (n, _) = check_matrix(g, s)?;
    let bg = g.constant(Tensor::full(&[n, 1], background));
    let logits = g.concat(&[bg, s], 1)?;
    Ok(g.softmax(logits, 1)?)
}

/// `m_ij = σ(s_ij − s_bg)`, independently per entry.
pub fn mpa_masks(g: &mut Graph, s: Var, background: f64) -> Result<Var> {
    check_matrix(g, s)?;
    let shifted = if background == 0.0 { s } else { g.add_scalar(s, -background)? };
    Ok(g.sigmoid(shifted)?)
}

/// `z_j = Σ_i w_ij s_ij` with `w_ij = m_ij / (Σ_i m_ij + ε)`.
pub fn gwp(g: &mut Graph, s: Var, m: Var, epsilon: f64) -> Result<Var> {
    if g.shape(s) != g.shape(m) {
        return Err(crate::TensorError::ShapeMismatch {
            op: "gwp",
            lhs: g.shape(s).to_vec(),
            rhs: g.shape(m).to_vec(),
        }
        .into());
    }
    if let Some(v) = g.value(m).data().iter().find(|&&v| v < 0.0) {
        return Err(invalid("gwp", format!("negative mask entry {v}")));
    }
    let mass = g.sum_axis(m, 0)?;
    let mass = g.add_scalar(mass, epsilon)?;
    let w = g.div_b(m, mass)?;
    let ws = g.mul(w, s)?;
    Ok(g.sum_axis(ws, 0)?)
}

/// `z_j = (1 − m̄_j)^p · log(λ + m̄_j)` with `m̄_j` the column mean.
pub fn size_scores(g: &mut Graph, m: Var, lambda: f64, power: f64) -> Result<Var> {
    if !(lambda > 0.0) {
        return Err(invalid("size_scores", format!("lambda {lambda} must be positive")));
    }
    let (n, _) = check_matrix(g, m)?;
    let mean = g.sum_axis(m, 0)?;
    let mean = g.scale(mean, 1.0 / n as f64)?;
    let complement = g.scale(mean, -1.0)?;
    let complement = g.add_scalar(complement, 1.0)?;
    // Rounding can leave 1 − m̄ a hair below zero for saturated masks.
    let complement = if g.value(complement).data().iter().any(|&v| v < 0.0) {
        let fixed = Tensor::from_fn(g.shape(complement), |i| g.value(complement).data()[i].max(0.0));
        g.constant(fixed)
    } else {
        complement
    };
    let focal = g.powf(complement, power)?;
    let shifted = g.add_scalar(mean, lambda)?;
    let log = g.ln(shifted)?;
    Ok(g.mul(focal, log)?)
}

/// Image-level scores for every expression under `cfg.mechanism`.
pub fn image_text_scores(g: &mut Graph, s: Var, cfg: &PoolingConfig) -> Result<Pooled> {
    cfg.validate()?;
    match cfg.mechanism {
        Mechanism::Gap => Ok(Pooled {
            z: gap(g, s)?,
            z_gwp: None,
            z_size: None,
            masks: None,
        }),
        Mechanism::Gmp => Ok(Pooled {
            z: gmp(g, s)?,
            z_gwp: None,
            z_size: None,
            masks: None,
        }),
        Mechanism::Spa | Mechanism::Mpa => {
            let (masks, expr_masks) = if cfg.mechanism == Mechanism::Spa {
                let full = spa_masks(g, s, cfg.background)?;
                let l = g.shape(s)[1];
                (full, g.slice(full, 1, 1, l)?)
            } else {
                let m = mpa_masks(g, s, cfg.background)?;
                (m, m)
            };
            let z_gwp = gwp(g, s, expr_masks, cfg.epsilon)?;
            let z_size = size_scores(g, expr_masks, cfg.lambda, cfg.power)?;
            Ok(Pooled {
                z: g.add(z_gwp, z_size)?,
                z_gwp: Some(z_gwp),
                z_size: Some(z_size),
                masks: Some(masks),
            })
        }
    }
}

/// Image-level scores as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub z: Vec<f64>,
    pub z_gwp: Option<Vec<f64>>,
    pub z_size: Option<Vec<f64>>,
}

impl ScoreVector {
    fn plain(z: Vec<f64>) -> Self {
        Self {
            z,
            z_gwp: None,
            z_size: None,
        }
    }
}

/// Patch masks as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    /// `N×L`, or `N×(L+1)` when `has_background`.
    pub values: Tensor,
    pub has_background: bool,
}

impl MaskMatrix {
    /// Number of expression columns (background excluded).
    pub fn expressions(&self) -> usize {
        self.values.shape()[1] - usize::from(self.has_background)
    }
}

fn eval<T>(s: &Tensor, f: impl FnOnce(&mut Graph, Var) -> Result<T>) -> Result<(Graph, T)> {
    let mut g = Graph::new();
    let v = g.constant(s.clone());
    let out = f(&mut g, v)?;
    Ok((g, out))
}

pub fn gap_scores(s: &Tensor) -> Result<ScoreVector> {
    let (g, z) = eval(s, gap)?;
    Ok(ScoreVector::plain(g.value(z).data().to_vec()))
}

pub fn gmp_scores(s: &Tensor) -> Result<ScoreVector> {
    let (g, z) = eval(s, gmp)?;
    Ok(ScoreVector::plain(g.value(z).data().to_vec()))
}

pub fn spa_mask_matrix(s: &Tensor, background: f64) -> Result<MaskMatrix> {
    let (g, m) = eval(s, |g, v| spa_masks(g, v, background))?;
    Ok(MaskMatrix {
        values: g.value(m).clone(),
        has_background: true,
    })
}

pub fn mpa_mask_matrix(s: &Tensor, background: f64) -> Result<MaskMatrix> {
    let (g, m) = eval(s, |g, v| mpa_masks(g, v, background))?;
    Ok(MaskMatrix {
        values: g.value(m).clone(),
        has_background: false,
    })
}

/// GWP scores for `s` and masks `m`; a background column in `m` is skipped.
pub fn gwp_scores(s: &Tensor, m: &MaskMatrix, epsilon: f64) -> Result<ScoreVector> {
    let (g, z) = eval(s, |g, sv| {
        let mv = g.constant(m.values.clone());
        let mv = if m.has_background {
            g.slice(mv, 1, 1, m.expressions())?
        } else {
            mv
        };
        gwp(g, sv, mv, epsilon)
    })?;
    Ok(ScoreVector::plain(g.value(z).data().to_vec()))
}

pub fn size_score_values(m: &MaskMatrix, lambda: f64, power: f64) -> Result<Vec<f64>> {
    let (g, z) = eval(&m.values, |g, mv| {
        let mv = if m.has_background {
            g.slice(mv, 1, 1, m.expressions())?
        } else {
            mv
        };
        size_scores(g, mv, lambda, power)
    })?;
    Ok(g.value(z).data().to_vec())
}

/// Scores and (for SPA/MPA) patch masks for a similarity matrix.
pub fn score_matrix(s: &Tensor, cfg: &PoolingConfig) -> Result<(ScoreVector, Option<MaskMatrix>)> {
    let (g, pooled) = eval(s, |g, v| image_text_scores(g, v, cfg))?;
    let vals = |v: Option<Var>| v.map(|v| g.value(v).data().to_vec());
    let scores = ScoreVector {
        z: g.value(pooled.z).data().to_vec(),
        z_gwp: vals(pooled.z_gwp),
        z_size: vals(pooled.z_size),
    };
    let masks = pooled.masks.map(|m| MaskMatrix {
        values: g.value(m).clone(),
        has_background: cfg.mechanism == Mechanism::Spa,
    });
    Ok((scores, masks))
}
