//! Patch-level masks to pixel-level binary segmentations.
//!
//! Interpolation uses half-pixel centers: output index `u` samples the source
//! at `(u + 0.5)·h/H − 0.5`, clamped to `[0, h − 1]`.

use crate::error::{invalid, Result};
use crate::image::Mask;
use crate::tensor::Tensor;

/// Default CAM binarization threshold.
pub const CAM_THRESHOLD: f64 = 0.4;

/// Float and binary pixel map for one expression.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMasks {
    pub expression: usize,
    pub soft: Vec<f64>,
    pub binary: Mask,
}

impl PixelMasks {
    pub fn height(&self) -> usize {
        self.binary.height
    }

    pub fn width(&self) -> usize {
        self.binary.width
    }
}

/// Source indices and blend weights `(lo, hi, frac)` for each output index.
fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|u| {
            let x = ((u as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

/// Bilinear resize of a row-major `h×w` grid to `H×W`.
pub fn bilinear_upsample(grid: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if h == 0 || w == 0 || grid.len() != h * w {
        return Err(invalid("bilinear_upsample", format!("grid of {} values is not {h}x{w}", grid.len())));
    }
    if out_h == 0 || out_w == 0 {
        return Err(invalid("bilinear_upsample", "target size must be positive"));
    }
    let ys = axis_weights(h, out_h);
    let xs = axis_weights(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = grid[y0 * w + x0] * (1.0 - fx) + grid[y0 * w + x1] * fx;
            let bottom = grid[y1 * w + x0] * (1.0 - fx) + grid[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(out)
}

/// The `(H·W) × (h·w)` matrix `U` with `U · vec(grid) = bilinear_upsample(grid)`.
pub fn upsample_matrix(h: usize, w: usize, out_h: usize, out_w: usize) -> Tensor {
    let ys = axis_weights(h, out_h);
    let xs = axis_weights(w, out_w);
    let mut data = vec![0.0; out_h * out_w * h * w];
    for (u, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (v, &(x0, x1, fx)) in xs.iter().enumerate() {
            let row = &mut data[(u * out_w + v) * h * w..(u * out_w + v + 1) * h * w];
            row[y0 * w + x0] += (1.0 - fy) * (1.0 - fx);
            row[y0 * w + x1] += (1.0 - fy) * fx;
            row[y1 * w + x0] += fy * (1.0 - fx);
            row[y1 * w + x1] += fy * fx;
        }
    }
    Tensor::new(vec![out_h * out_w, h * w], data).expect("upsample matrix shape")
}

fn grid_side(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || n == 0 {
        return Err(invalid("decode", format!("{n} patches do not form a square grid")));
    }
    Ok(side)
}

fn columns(m: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, l) = m.dims2()?;
    Ok((n, l, grid_side(n)?))
}

/// MPA decoding: each column is upsampled and thresholded at 0.5, the mask
/// value an expression takes exactly at the background logit. Masks may
/// overlap.
pub fn decode_mpa(masks: &Tensor, height: usize, width: usize) -> Result<Vec<PixelMasks>> {
    let (_, l, side) = columns(masks)?;
    (0..l)
        .map(|j| {
            let soft = bilinear_upsample(&masks.column(j), side, side, height, width)?;
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

/// SPA decoding: background (column 0) and expression columns are upsampled
/// and every pixel goes to its argmax column, lowest index on ties. Masks are
/// mutually exclusive.
pub fn decode_spa(masks: &Tensor, height: usize, width: usize) -> Result<Vec<PixelMasks>> {
    let (_, cols, side) = columns(masks)?;
    if cols < 2 {
        return Err(invalid("decode_spa", "need a background column and at least one expression"));
    }
    let maps = (0..cols)
        .map(|j| bilinear_upsample(&masks.column(j), side, side, height, width))
        .collect::<Result<Vec<_>>>()?;
    let winner: Vec<usize> = (0..height * width)
        .map(|p| {
            let mut best = 0;
            for j in 1..cols {
                if maps[j][p] > maps[best][p] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok((1..cols)
        .map(|j| PixelMasks {
            expression: j - 1,
            binary: Mask {
                height,
                width,
                data: winner.iter().map(|&w| w == j).collect(),
            },
            soft: maps[j].clone(),
        })
        .collect())
}

/// Class-activation decoding for GAP/GMP: per column `relu(s)` divided by its
/// maximum (all-zero when the maximum is not positive), upsampled and
/// thresholded at `beta`.
pub fn decode_cam(similarity: &Tensor, beta: f64, height: usize, width: usize) -> Result<Vec<PixelMasks>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("decode_cam", format!("beta {beta} outside (0, 1)")));
    }
    let (_, l, side) = columns(similarity)?;
    (0..l)
        .map(|j| {
            let col = similarity.column(j);
            let peak = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let cam: Vec<f64> = if peak > 0.0 {
                col.iter().map(|&v| v.max(0.0) / peak).collect()
            } else {
                vec![0.0; col.len()]
            };
            let soft = bilinear_upsample(&cam, side, side, height, width)?;
            let binary = Mask {
                height,
                width,
                data: soft.iter().map(|&v| v > beta).collect(),
            };
            Ok(PixelMasks {
                expression: j,
                soft,
                binary,
            })
        })
        .collect()
}

/// Union of binary masks and pointwise max of float maps.
pub fn merge_masks(masks: &[PixelMasks]) -> Result<PixelMasks> {
    let first = masks.first().ok_or_else(|| invalid("merge_masks", "nothing to merge"))?;
    let (h, w) = (first.height(), first.width());
    let mut merged = first.clone();
    for m in &masks[1..] {
        if (m.height(), m.width()) != (h, w) {
            return Err(invalid(
                "merge_masks",
                format!("{}x{} vs {}x{}", m.height(), m.width(), h, w),
            ));
        }
        merged.binary = merged.binary.union(&m.binary);
        for (a, b) in merged.soft.iter_mut().zip(&m.soft) {
            *a = a.max(*b);
        }
    }
    Ok(merged)
}
