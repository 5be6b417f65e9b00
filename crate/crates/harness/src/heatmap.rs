//! PNG rendering of one sample's saliency grid.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{HarnessError, Result};

const CELL: u32 = 8;
const OUTLINE: Rgb<u8> = Rgb([230, 30, 30]);

/// Dark blue through teal to yellow.
const RAMP: [[f64; 3]; 4] = [[20.0, 20.0, 70.0], [30.0, 110.0, 140.0], [90.0, 190.0, 110.0], [250.0, 230.0, 60.0]];

fn colour(v: f64) -> Rgb<u8> {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let pos = v * (RAMP.len() - 1) as f64;
    let k = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - k as f64;
    let c = |j: usize| (RAMP[k][j] + f * (RAMP[k + 1][j] - RAMP[k][j])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Time runs left to right and features top to bottom; each cell is an
/// `8×8` block coloured by its value, and truly salient cells get a red
/// outline. `values` and `truth` are row-major `[T, D]`.
pub fn render(values: &[f64], truth: Option<&[bool]>, t: usize, d: usize) -> Result<RgbImage> {
    if values.len() != t * d || truth.is_some_and(|m| m.len() != t * d) {
        return Err(HarnessError::Config(format!("heatmap needs {t}x{d} values")));
    }
    let mut img = RgbImage::new(t as u32 * CELL, d as u32 * CELL);
    for s in 0..t {
        for f in 0..d {
            let fill = colour(values[s * d + f]);
            let marked = truth.is_some_and(|m| m[s * d + f]);
            for dy in 0..CELL {
                for dx in 0..CELL {
                    let edge = dx == 0 || dy == 0 || dx == CELL - 1 || dy == CELL - 1;
                    let px = if marked && edge { OUTLINE } else { fill };
                    img.put_pixel(s as u32 * CELL + dx, f as u32 * CELL + dy, px);
                }
            }
        }
    }
    Ok(img)
}

pub fn write_heatmap(path: &Path, values: &[f64], truth: Option<&[bool]>, t: usize, d: usize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    render(values, truth, t, d)?.save(path)?;
    Ok(())
}
