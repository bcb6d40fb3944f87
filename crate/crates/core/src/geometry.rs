//! Axis-aligned box arithmetic in continuous pixel coordinates.
//!
//! Boxes are stored as `(x, y, w, h)` with the origin at the top-left corner
//! and `y` growing downward. Every IoU threshold comparison in the crate uses
//! `>=`.

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Axis-aligned rectangle with strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BBox::new(raw.x, raw.y, raw.w, raw.h)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and zero or negative extents.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite { x, y, w, h });
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::Degenerate { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Square box of side `size` centred on `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, size: f64) -> Result<Self, GeometryError> {
        Self::new(cx - size / 2.0, cy - size / 2.0, size, size)
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Area of the overlap with `other`; zero when the boxes only touch.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// Shifts the box by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x: self.x + dx,
            y: self.y + dy,
            w: self.w,
            h: self.h,
        }
    }

    /// True when the box lies inside `[0, frame_w] x [0, frame_h]`.
    pub fn within_frame(&self, frame_w: f64, frame_h: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= frame_w && self.bottom() <= frame_h
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    /// Mirrors the box inside a `frame_w x frame_h` frame.
    ///
    /// `flip_h` mirrors around the vertical centre line (x changes),
    /// `flip_v` around the horizontal one (y changes).
    pub fn flip(
        &self,
        frame_w: f64,
        frame_h: f64,
        flip_h: bool,
        flip_v: bool,
    ) -> Result<BBox, GeometryError> {
        if !self.within_frame(frame_w, frame_h) {
            return Err(GeometryError::OutsideFrame {
                bbox: *self,
                frame_w,
                frame_h,
            });
        }
        let mut out = *self;
        if flip_h {
            out.x = frame_w - self.x - self.w;
        }
        if flip_v {
            out.y = frame_h - self.y - self.h;
        }
        Ok(out)
    }

    /// Intersection with `[0, frame_w] x [0, frame_h]`, or `None` when nothing
    /// of positive area remains.
    pub fn clip(&self, frame_w: f64, frame_h: f64) -> Option<BBox> {
        self.clip_to(0.0, 0.0, frame_w, frame_h)
    }

    /// Intersection with the rectangle `[x0, x1] x [y0, y1]`.
    pub fn clip_to(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<BBox> {
        if self.x >= x0 && self.y >= y0 && self.right() <= x1 && self.bottom() <= y1 {
            return Some(*self);
        }
        let left = self.x.max(x0);
        let top = self.y.max(y0);
        let right = self.right().min(x1);
        let bottom = self.bottom().min(y1);
        if right <= left || bottom <= top {
            return None;
        }
        Some(BBox {
            x: left,
            y: top,
            w: right - left,
            h: bottom - top,
        })
    }
}

/// Intersection over union of two valid boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    // Edge-difference areas, so that identical boxes give exactly 1.
    let edge_area = |r: &BBox| (r.right() - r.x) * (r.bottom() - r.y);
    let union = edge_area(a) + edge_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Free-function form of [`BBox::flip`].
pub fn flip_box(
    b: &BBox,
    frame_w: f64,
    frame_h: f64,
    flip_h: bool,
    flip_v: bool,
) -> Result<BBox, GeometryError> {
    b.flip(frame_w, frame_h, flip_h, flip_v)
}

/// Free-function form of [`BBox::clip`].
pub fn clip_box(b: &BBox, frame_w: f64, frame_h: f64) -> Option<BBox> {
    b.clip(frame_w, frame_h)
}
