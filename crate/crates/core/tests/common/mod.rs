//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use candle_core::{Device, Tensor, Var};
use unic_core::{BBox, Orientation};

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Counts pixels of an `n x n` raster of the unit square covered by each box.
/// Pixel `(i, j)` belongs to a box when its center does.
pub fn raster_iou(a: &BBox, b: &BBox, n: usize) -> f64 {
    let inside = |bx: &BBox, u: f64, v: f64| {
        let c = bx.corners();
        u > c.x1 && u < c.x2 && v > c.y1 && v < c.y2
    };
    let (mut inter, mut union) = (0u64, 0u64);
    for j in 0..n {
        let v = (j as f64 + 0.5) / n as f64;
        for i in 0..n {
            let u = (i as f64 + 0.5) / n as f64;
            let (ia, ib) = (inside(a, u, v), inside(b, u, v));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    inter as f64 / union as f64
}

/// Minimum over every injective map of the smaller side into the larger one.
pub fn brute_force(cost: &[Vec<f64>]) -> f64 {
    let (rows, cols) = (cost.len(), cost[0].len());
    let transposed = rows > cols;
    let at = |r: usize, c: usize| if transposed { cost[c][r] } else { cost[r][c] };
    let (small, large) = if transposed { (cols, rows) } else { (rows, cols) };
    fn go(i: usize, small: usize, large: usize, used: &mut Vec<bool>, acc: f64, at: &dyn Fn(usize, usize) -> f64) -> f64 {
        if i == small {
            return acc;
        }
        let mut best = f64::INFINITY;
        for j in 0..large {
            if !used[j] {
                used[j] = true;
                best = best.min(go(i + 1, small, large, used, acc + at(i, j), at));
                used[j] = false;
            }
        }
        best
    }
    go(0, small, large, &mut vec![false; large], 0.0, &at)
}

/// Relative error `|g - n| / max(|g|, |n|)` over the whole gradient vector.
pub fn gradcheck(name: &str, x0: &[f64], shape: &[usize], f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let dev = Device::Cpu;
    let var = Var::from_tensor(&Tensor::from_slice(x0, shape, &dev).unwrap()).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    let analytic: Vec<f64> = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let eval = |x: &[f64]| -> f64 { f(&Tensor::from_slice(x, shape, &dev).unwrap()).to_scalar::<f64>().unwrap() };
    let numeric: Vec<f64> = (0..x0.len())
        .map(|i| {
            let mut plus = x0.to_vec();
            let mut minus = x0.to_vec();
            plus[i] += H;
            minus[i] -= H;
            (eval(&plus) - eval(&minus)) / (2.0 * H)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    assert!(scale > 1e-8, "{name}: vanishing gradient");
    let rel = norm(&diff) / scale;
    assert!(rel.is_finite(), "{name}: non-finite gradient");
    rel
}

/// Independent check of one sampled view against its world and best crop.
/// Returns the violated constraint, if any.
pub fn violation(view: &BBox, o: Orientation, ww: f64, wh: f64, gt: &BBox) -> Option<String> {
    let (w, h) = (view.w * ww, view.h * wh);
    if w < 0.7 * ww - 1e-9 || h < 0.7 * wh - 1e-9 {
        return Some(format!("scale {w}x{h} in {ww}x{wh}"));
    }
    // Plain corner arithmetic in pixels.
    let (x1, y1, x2, y2) = (view.x * ww - w / 2.0, view.y * wh - h / 2.0, view.x * ww + w / 2.0, view.y * wh + h / 2.0);
    let (g1, h1, g2, h2) = ((gt.x - gt.w / 2.0) * ww, (gt.y - gt.h / 2.0) * wh, (gt.x + gt.w / 2.0) * ww, (gt.y + gt.h / 2.0) * wh);
    let inter = (x2.min(g2) - x1.max(g1)).max(0.0) * (y2.min(h2) - y1.max(h1)).max(0.0);
    let iou = inter / (w * h + (g2 - g1) * (h2 - h1) - inter);
    if iou < 0.7 - 1e-12 {
        return Some(format!("iou {iou}"));
    }
    let (rw, rh) = match o {
        Orientation::Landscape => (4.0, 3.0),
        Orientation::Portrait => (3.0, 4.0),
    };
    if (w - h * rw / rh).abs() > 1.0 {
        return Some(format!("ratio {w}/{h}"));
    }
    if x1 < -1e-9 || y1 < -1e-9 || x2 > ww + 1e-9 || y2 > wh + 1e-9 {
        return Some("view leaves the world".into());
    }
    None
}

