//! Arithmetic on unbounded normalized boxes.
//!
//! A [`BBox`] is stored in center form `[x, y, w, h]`, normalized against some
//! reference frame (the world image, or the user's initial view). Coordinates
//! are free to leave `[0, 1]`: a box hanging off the left border of the
//! initial view is exactly how the model expresses "move the camera left".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Corner form of a [`BBox`]. Derived on demand, never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Camera orientation. The sensor ratio is 4:3 held either way round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Landscape,
    Portrait,
}

impl Orientation {
    /// Width over height of a camera view with this orientation.
    pub fn ratio(self) -> f64 {
        match self {
            Orientation::Landscape => 4.0 / 3.0,
            Orientation::Portrait => 3.0 / 4.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::Landscape => Orientation::Portrait,
            Orientation::Portrait => Orientation::Landscape,
        }
    }

    /// Orientation of a `width x height` raster; square counts as landscape.
    pub fn of_extent(width: f64, height: f64) -> Self {
        if width >= height {
            Orientation::Landscape
        } else {
            Orientation::Portrait
        }
    }
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Orientation::Landscape => f.write_str("landscape"),
            Orientation::Portrait => f.write_str("portrait"),
        }
    }
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "landscape" => Ok(Orientation::Landscape),
            "portrait" => Ok(Orientation::Portrait),
            other => Err(Error::InvalidArgument(format!("unknown orientation `{other}`"))),
        }
    }
}

impl BBox {
    /// The unit box `[0.5, 0.5, 1, 1]`: a frame expressed in its own coordinates.
    pub const UNIT: BBox = BBox { x: 0.5, y: 0.5, w: 1.0, h: 1.0 };

    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.x.is_finite() && self.y.is_finite();
        if !(finite && self.w.is_finite() && self.h.is_finite() && self.w > 0.0 && self.h > 0.0) {
            return Err(Error::DegenerateBox { w: self.w, h: self.h });
        }
        Ok(())
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn corners(&self) -> Corners {
        Corners {
            x1: self.x - self.w / 2.0,
            y1: self.y - self.h / 2.0,
            x2: self.x + self.w / 2.0,
            y2: self.y + self.h / 2.0,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// True when `other` lies inside `self` (closed containment) up to `tol`.
    pub fn contains(&self, other: &BBox, tol: f64) -> bool {
        let a = self.corners();
        let b = other.corners();
        b.x1 >= a.x1 - tol && b.y1 >= a.y1 - tol && b.x2 <= a.x2 + tol && b.y2 <= a.y2 + tol
    }

    /// True when the box lies inside the unit square.
    pub fn inside_unit(&self, tol: f64) -> bool {
        BBox::UNIT.contains(self, tol)
    }

    /// Re-expresses a box given in an outer frame into the coordinates of `frame`
    /// (itself expressed in the outer frame).
    pub fn to_frame(&self, frame: &BBox) -> Result<BBox> {
        frame.validate()?;
        let f = frame.corners();
        Ok(BBox {
            x: (self.x - f.x1) / frame.w,
            y: (self.y - f.y1) / frame.h,
            w: self.w / frame.w,
            h: self.h / frame.h,
        })
    }

    /// Inverse of [`BBox::to_frame`].
    pub fn from_frame(&self, frame: &BBox) -> Result<BBox> {
        frame.validate()?;
        let f = frame.corners();
        Ok(BBox {
            x: f.x1 + self.x * frame.w,
            y: f.y1 + self.y * frame.h,
            w: self.w * frame.w,
            h: self.h * frame.h,
        })
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let (a, b) = (a.corners(), b.corners());
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    iw * ih
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`, in `[-1, 1]`.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let (ca, cb) = (a.corners(), b.corners());
    let enclosing = (ca.x2.max(cb.x2) - ca.x1.min(cb.x1)) * (ca.y2.max(cb.y2) - ca.y1.min(cb.y1));
    Ok(inter / union - (enclosing - union) / enclosing)
}

/// Boundary displacement: the four absolute edge offsets, averaged.
pub fn disp(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (a, b) = (a.corners(), b.corners());
    Ok(((a.x1 - b.x1).abs() + (a.y1 - b.y1).abs() + (a.x2 - b.x2).abs() + (a.y2 - b.y2).abs()) / 4.0)
}

/// Smallest box of width/height ratio `ratio` sharing the crop's center and
/// containing it.
pub fn derive_view_with_ratio(crop: &BBox, ratio: f64) -> Result<BBox> {
    crop.validate()?;
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::InvalidArgument(format!("view ratio {ratio}")));
    }
    let (w, h) = if crop.w / crop.h >= ratio {
        (crop.w, crop.w / ratio)
    } else {
        (crop.h * ratio, crop.h)
    };
    Ok(BBox { x: crop.x, y: crop.y, w, h })
}

/// Camera view implied by a composition crop, in a frame whose normalized
/// units are square (e.g. a square world).
pub fn derive_view(crop: &BBox, orientation: Orientation) -> Result<BBox> {
    derive_view_with_ratio(crop, orientation.ratio())
}

/// Camera view implied by a crop expressed in a frame whose pixel extent has
/// width/height ratio `frame_aspect`. In the initial-view frame of a camera the
/// identity view is `[0.5, 0.5, 1, 1]`.
pub fn derive_view_in_frame(crop: &BBox, orientation: Orientation, frame_aspect: f64) -> Result<BBox> {
    derive_view_with_ratio(crop, orientation.ratio() / frame_aspect)
}

/// Pulls a world-frame view back inside the unit world box: first shrink about
/// the center (ratio preserved) if it is larger than the world along an axis,
/// then translate the minimum distance needed.
pub fn clamp_to_world(view: &BBox) -> BBox {
    let shrink = (1.0 / view.w).min(1.0 / view.h).min(1.0);
    let w = view.w * shrink;
    let h = view.h * shrink;
    let clamp_axis = |c: f64, size: f64| {
        if size >= 1.0 {
            0.5
        } else {
            c.clamp(size / 2.0, 1.0 - size / 2.0)
        }
    };
    BBox { x: clamp_axis(view.x, w), y: clamp_axis(view.y, h), w, h }
}
