//! Token grids and their positional embeddings.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// A `rows x cols` grid of `d`-dimensional tokens laid out row-major.
///
/// `coords` holds the `(u, v)` cell centers in the initial-view frame; cells
/// of an extended grid have centers outside `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TokenGrid {
    /// `[B, rows * cols, d]`
    pub tokens: Tensor,
    pub coords: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
    pub rows: usize,
    pub cols: usize,
    /// Padding cells added on each side of the visible grid.
    pub margin: usize,
}

impl TokenGrid {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    pub fn padded_count(&self) -> usize {
        self.visible.len() - self.visible_count()
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(self.tokens.dim(2)?)
    }

    /// Visible grid extent `(rows, cols)` before padding.
    pub fn base_shape(&self) -> (usize, usize) {
        (self.rows - 2 * self.margin, self.cols - 2 * self.margin)
    }
}

/// Cell-center coordinates of a `base_rows x base_cols` grid extended by
/// `margin` cells per side, row-major, in the frame where the base grid spans
/// `[0, 1]^2`. Also returns each cell's visibility.
pub fn extended_coords(base_rows: usize, base_cols: usize, margin: usize) -> (Vec<[f64; 2]>, Vec<bool>) {
    let m = margin as isize;
    let mut coords = Vec::new();
    let mut visible = Vec::new();
    for i in -m..(base_rows as isize + m) {
        for j in -m..(base_cols as isize + m) {
            coords.push([(j as f64 + 0.5) / base_cols as f64, (i as f64 + 0.5) / base_rows as f64]);
            visible.push(i >= 0 && j >= 0 && i < base_rows as isize && j < base_cols as isize);
        }
    }
    (coords, visible)
}

/// Sinusoidal embedding of continuous 2-D coordinates, `[N, d]` (`d % 4 == 0`).
///
/// The first half encodes `v` (vertical), the second half `u`; each half
/// interleaves sine and cosine over geometrically spaced frequencies. Any
/// real coordinate is accepted, so out-of-frame cells need no special casing.
pub fn sine_embedding(coords: &[[f64; 2]], d: usize, temperature: f64, dtype: DType, device: &Device) -> Result<Tensor> {
    if d % 4 != 0 {
        return Err(Error::InvalidArgument(format!("embedding dim {d} not divisible by 4")));
    }
    let per_axis = d / 2;
    let mut out = Vec::with_capacity(coords.len() * d);
    for &[u, v] in coords {
        for c in [v, u] {
            let scaled = c * std::f64::consts::TAU;
            for k in 0..per_axis / 2 {
                let freq = temperature.powf(2.0 * k as f64 / per_axis as f64);
                out.push((scaled / freq).sin());
                out.push((scaled / freq).cos());
            }
        }
    }
    Ok(Tensor::from_vec(out, (coords.len(), d), device)?.to_dtype(dtype)?)
}
