//! Exponential-moving-average teacher and the out-of-view token targets it
//! supplies to the extrapolation module.

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::{extended_coords, ModelConfig, UnicModel};

/// `teacher <- mu * teacher + (1 - mu) * student` for every named variable.
pub fn ema_update(teacher: &VarMap, student: &VarMap, mu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidArgument(format!("ema decay {mu} outside [0, 1]")));
    }
    let t = teacher.data().lock().expect("var map poisoned");
    let s = student.data().lock().expect("var map poisoned");
    if t.len() != s.len() {
        return Err(Error::Shape(format!("teacher has {} variables, student {}", t.len(), s.len())));
    }
    for (name, tv) in t.iter() {
        let sv = s.get(name).ok_or_else(|| Error::Shape(format!("student lacks {name}")))?;
        if tv.shape() != sv.shape() {
            return Err(Error::Shape(format!("{name}: {:?} vs {:?}", tv.shape(), sv.shape())));
        }
        let next = ((tv.as_tensor() * mu)? + (sv.as_tensor().detach() * (1.0 - mu))?)?;
        tv.set(&next)?;
    }
    Ok(())
}

/// Copies every variable of `src` into `dst`.
pub fn copy_vars(dst: &VarMap, src: &VarMap) -> Result<()> {
    ema_update(dst, src, 0.0)
}

/// A frozen copy of the student, updated only through [`ema_update`].
pub struct EmaTeacher {
    pub model: UnicModel,
    pub vars: VarMap,
    pub decay: f64,
}

impl EmaTeacher {
    pub fn new(cfg: &ModelConfig, student: &VarMap, decay: f64, dtype: DType, device: &Device) -> Result<Self> {
        let vars = VarMap::new();
        let model = UnicModel::new(cfg, VarBuilder::from_varmap(&vars, dtype, device))?;
        copy_vars(&vars, student)?;
        Ok(Self { model, vars, decay })
    }

    pub fn update(&self, student: &VarMap) -> Result<()> {
        ema_update(&self.vars, student, self.decay)
    }
}

/// Placement of the teacher canvas for one initial view: the view grown by
/// `margin` cells on every side, so that the canvas grid coincides cell for
/// cell with the student's extended grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasLayout {
    /// World-normalized region rendered into the canvas.
    pub region: BBox,
    pub width: usize,
    pub height: usize,
    /// Extended-grid cell centers in the initial-view frame, row-major.
    pub coords: Vec<[f64; 2]>,
    /// Cells usable as extrapolation targets: outside the view, center inside
    /// the world.
    pub valid: Vec<bool>,
    /// Offset in canvas pixels of the initial view's top-left corner.
    pub view_offset: (usize, usize),
}

pub fn canvas_layout(cfg: &ModelConfig, init_view: &BBox) -> Result<CanvasLayout> {
    init_view.validate()?;
    let (rows, cols) = cfg.grid();
    let m = cfg.margin();
    let s = cfg.stride();
    let region = BBox::new(
        init_view.x,
        init_view.y,
        init_view.w * (cols + 2 * m) as f64 / cols as f64,
        init_view.h * (rows + 2 * m) as f64 / rows as f64,
    )?;
    let (coords, visible) = extended_coords(rows, cols, m);
    let valid = coords
        .iter()
        .zip(&visible)
        .map(|(c, v)| {
            let wx = init_view.x + (c[0] - 0.5) * init_view.w;
            let wy = init_view.y + (c[1] - 0.5) * init_view.h;
            !v && (0.0..=1.0).contains(&wx) && (0.0..=1.0).contains(&wy)
        })
        .collect();
    Ok(CanvasLayout {
        region,
        width: (cols + 2 * m) * s,
        height: (rows + 2 * m) * s,
        coords,
        valid,
        view_offset: (m * s, m * s),
    })
}

/// Teacher tokens over the student's extended grid, `[B, cells, d]`, detached.
/// `canvases` is `[B, 3, H, W]` rendered per [`canvas_layout`].
pub fn teacher_tokens(teacher: &UnicModel, canvases: &Tensor) -> Result<Tensor> {
    let cfg = teacher.config();
    let (rows, cols) = cfg.grid();
    let (coords, _) = extended_coords(rows, cols, cfg.margin());
    Ok(teacher.encode_at(canvases, &coords)?.detach())
}

/// Per-sample validity mask `[B, cells]` in `dtype`.
pub fn mask_tensor(layouts: &[CanvasLayout], dtype: DType, device: &Device) -> Result<Tensor> {
    let cells = layouts.first().map_or(0, |l| l.valid.len());
    let flat: Vec<f32> = layouts.iter().flat_map(|l| l.valid.iter().map(|v| if *v { 1.0 } else { 0.0 })).collect();
    Ok(Tensor::from_vec(flat, (layouts.len(), cells), device)?.to_dtype(dtype)?)
}
